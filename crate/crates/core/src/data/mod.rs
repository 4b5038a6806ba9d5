//! On-disk formats: datasets, detections, grids, backend replay directories,
//! and the synthetic scene generator.
//!
//! Dataset and detection files hold one JSON object per line. Fields this
//! crate does not know about are carried through load/save untouched.

pub mod grid;
pub mod replay;
pub mod scene;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::evaluation::Annotation;
use crate::geometry::{BBox, ScoredBox};

/// Dataset file name inside a dataset directory.
pub const DATASET_FILE: &str = "dataset.jsonl";
/// Saliency map subdirectory inside a dataset directory.
pub const SALIENCY_DIR: &str = "saliency";
/// Synthetic backend description inside a dataset directory.
pub const SCENE_FILE: &str = "scene.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ImageInfo {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32) -> Self {
        ImageInfo {
            image_id: image_id.into(),
            width,
            height,
            extra: Map::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    #[serde(flatten)]
    pub annotation: Annotation,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl From<Annotation> for AnnotationRecord {
    fn from(annotation: Annotation) -> Self {
        AnnotationRecord {
            annotation,
            extra: Map::new(),
        }
    }
}

/// A scored box on one image; used for proposals and detections alike.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl DetectionRecord {
    pub fn new(image_id: impl Into<String>, bbox: BBox, score: f64) -> Self {
        DetectionRecord {
            image_id: image_id.into(),
            bbox,
            score,
            extra: Map::new(),
        }
    }

    pub fn scored_box(&self) -> Result<ScoredBox> {
        ScoredBox::new(self.bbox, self.score)
    }

    pub fn with_extra(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.extra.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum DatasetLine {
    Image(ImageInfo),
    Annotation(AnnotationRecord),
    Proposal(DetectionRecord),
}

/// Images, their ground truth and (optionally) scored proposals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<AnnotationRecord>,
    pub proposals: Vec<DetectionRecord>,
}

impl Dataset {
    pub fn image(&self, image_id: &str) -> Option<&ImageInfo> {
        self.images.iter().find(|i| i.image_id == image_id)
    }

    pub fn annotations_for<'a>(&'a self, image_id: &'a str) -> impl Iterator<Item = &'a Annotation> + 'a {
        self.annotations
            .iter()
            .map(|a| &a.annotation)
            .filter(move |a| a.image_id == image_id)
    }

    /// Check cross-record invariants; lists every offender.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut ids = HashSet::new();
        for img in &self.images {
            if !ids.insert(img.image_id.as_str()) {
                problems.push(format!("duplicate image_id {}", img.image_id));
            }
            if img.width == 0 || img.height == 0 {
                problems.push(format!("image {} has zero size", img.image_id));
            }
        }
        let bounds = |image_id: &str| self.image(image_id).map(|i| (i.width as f64, i.height as f64));
        for (n, rec) in self.annotations.iter().enumerate() {
            let a = &rec.annotation;
            match bounds(&a.image_id) {
                None => problems.push(format!("annotation {n} references unknown image_id {}", a.image_id)),
                Some((w, h)) => {
                    if a.bb_full.clip(w, h).is_none() {
                        problems.push(format!("annotation {n} on {} lies outside the image", a.image_id));
                    }
                }
            }
            problems.extend(a.problems().into_iter().map(|p| format!("annotation {n}: {p}")));
        }
        for (n, p) in self.proposals.iter().enumerate() {
            match bounds(&p.image_id) {
                None => problems.push(format!("proposal {n} references unknown image_id {}", p.image_id)),
                Some((w, h)) => {
                    if p.bbox.clip(w, h).is_none() {
                        problems.push(format!("proposal {n} on {} lies outside the image", p.image_id));
                    }
                }
            }
            if !p.score.is_finite() {
                problems.push(format!("proposal {n} has a non-finite score"));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Proposals grouped by image, in image order.
    pub fn proposals_by_image(&self) -> BTreeMap<&str, Vec<&DetectionRecord>> {
        group_by_image(&self.proposals)
    }
}

pub(crate) fn group_by_image(records: &[DetectionRecord]) -> BTreeMap<&str, Vec<&DetectionRecord>> {
    let mut out: BTreeMap<&str, Vec<&DetectionRecord>> = BTreeMap::new();
    for r in records {
        out.entry(r.image_id.as_str()).or_default().push(r);
    }
    out
}

fn dataset_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(DATASET_FILE)
    } else {
        path.to_path_buf()
    }
}

fn parse_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let rec = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

fn to_lines<T: Serialize>(records: impl IntoIterator<Item = T>) -> Result<String> {
    let mut out = String::new();
    for r in records {
        let line = serde_json::to_string(&r).map_err(|e| Error::invalid(e.to_string()))?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

/// Load and validate a dataset. `path` is the dataset file or a directory
/// containing [`DATASET_FILE`].
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = dataset_file(path);
    let mut ds = Dataset::default();
    for line in parse_lines::<DatasetLine>(&file)? {
        match line {
            DatasetLine::Image(i) => ds.images.push(i),
            DatasetLine::Annotation(a) => ds.annotations.push(a),
            DatasetLine::Proposal(p) => ds.proposals.push(p),
        }
    }
    ds.validate()?;
    Ok(ds)
}

/// Write a dataset atomically: images, then annotations, then proposals.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let lines = ds
        .images
        .iter()
        .cloned()
        .map(DatasetLine::Image)
        .chain(ds.annotations.iter().cloned().map(DatasetLine::Annotation))
        .chain(ds.proposals.iter().cloned().map(DatasetLine::Proposal));
    write_atomic(&dataset_file(path), to_lines(lines)?.as_bytes())
}

pub fn load_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let recs: Vec<DetectionRecord> = parse_lines(path)?;
    let bad: Vec<String> = recs
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.score.is_finite())
        .map(|(n, r)| format!("detection {n} on {} has a non-finite score", r.image_id))
        .collect();
    if !bad.is_empty() {
        return Err(Error::Validation(bad));
    }
    Ok(recs)
}

pub fn save_detections(records: &[DetectionRecord], path: &Path) -> Result<()> {
    write_atomic(path, to_lines(records)?.as_bytes())
}

/// Write via a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Path of the saliency grid for `image_id` under a dataset directory.
pub fn saliency_path(root: &Path, image_id: &str) -> PathBuf {
    root.join(SALIENCY_DIR).join(format!("{}.grid", file_safe(image_id)))
}

/// Image id with anything but `[A-Za-z0-9_.-]` replaced, and no leading dot.
pub fn file_safe(id: &str) -> String {
    let s: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "_-.".contains(c) { c } else { '_' })
        .collect();
    match s.strip_prefix('.') {
        Some(rest) => format!("_{rest}"),
        None => s,
    }
}
