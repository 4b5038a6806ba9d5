//! Replay directories: recorded backend outputs served back as a backend.
//!
//! A replay directory holds `manifest.jsonl` and one pair of grid files
//! (confidence map and activation features) per evaluated region:
//!
//! ```text
//! {"kind":"geometry","input_w":96,"input_h":160,"stride":32}
//! {"kind":"weights","detector":"root","weights":[1.0,0.5]}
//! {"kind":"map","image_id":"img0","detector":"root","key":"…","dx":0,"dy":0,"f":4,
//!  "region":[x,y,w,h],"score":0.8,"fcn":"maps/img0/….fcn.grid","features":"maps/img0/….feat.grid"}
//! ```
//!
//! Entries are keyed by image, detector, shift and the exact bits of the
//! unshifted region, so a replay answers exactly the queries that were
//! recorded and reports anything else as missing input.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::grid::{load_grid, save_grid, Grid};
use super::{file_safe, write_atomic};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::heatmap::{BackendGeometry, ClassWeights, Detector, RegionQuery, ScorerBackend, ScorerOutput};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapEntry {
    pub image_id: String,
    pub detector: String,
    pub key: String,
    pub dx: u32,
    pub dy: u32,
    pub f: u32,
    /// The unshifted region.
    pub region: BBox,
    pub score: f64,
    pub fcn: String,
    pub features: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ManifestLine {
    Geometry { input_w: u32, input_h: u32, stride: u32 },
    Weights { detector: String, weights: Vec<f64> },
    Map(MapEntry),
}

/// Stable key of one query: 16 hex digits of a SHA-256 over its identity.
pub fn query_key(query: &RegionQuery<'_>) -> String {
    let r = &query.base_region;
    let mut h = Sha256::new();
    h.update(query.image_id.as_bytes());
    h.update([0u8]);
    h.update(query.detector.name().as_bytes());
    for v in [query.shift.dx, query.shift.dy, query.shift.f] {
        h.update(v.to_le_bytes());
    }
    for v in [r.x(), r.y(), r.w(), r.h()] {
        h.update(v.to_bits().to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn parse_detector(name: &str, path: &Path, line: usize) -> Result<Detector> {
    Detector::from_name(name).ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        line,
        message: format!("unknown detector `{name}`"),
    })
}

/// Backend that answers from a replay directory.
#[derive(Debug)]
pub struct DirectoryBackend {
    root: PathBuf,
    geometry: BackendGeometry,
    weights: HashMap<Detector, ClassWeights>,
    maps: HashMap<String, MapEntry>,
}

impl DirectoryBackend {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut geometry = None;
        let mut weights = HashMap::new();
        let mut maps = HashMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let raw = raw.trim();
            if raw.is_empty() {
                continue;
            }
            let line: ManifestLine = serde_json::from_str(raw).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            match line {
                ManifestLine::Geometry { input_w, input_h, stride } => {
                    let g = BackendGeometry { input_w, input_h, stride };
                    if input_w % stride.max(1) != 0 || input_h % stride.max(1) != 0 || stride == 0 {
                        return Err(Error::Parse {
                            path: path.display().to_string(),
                            line: idx + 1,
                            message: format!("input {input_w}x{input_h} is not a multiple of stride {stride}"),
                        });
                    }
                    geometry = Some(g);
                }
                ManifestLine::Weights { detector, weights: w } => {
                    weights.insert(parse_detector(&detector, &path, idx + 1)?, ClassWeights(w));
                }
                ManifestLine::Map(entry) => {
                    parse_detector(&entry.detector, &path, idx + 1)?;
                    maps.insert(entry.key.clone(), entry);
                }
            }
        }
        Ok(DirectoryBackend {
            root: root.to_path_buf(),
            geometry: geometry.unwrap_or_default(),
            weights,
            maps,
        })
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

impl ScorerBackend for DirectoryBackend {
    fn geometry(&self) -> BackendGeometry {
        self.geometry
    }

    fn class_weights(&self, detector: Detector) -> Result<ClassWeights> {
        self.weights.get(&detector).cloned().ok_or_else(|| {
            Error::MissingInput(format!(
                "replay directory {} has no class weights for {}",
                self.root.display(),
                detector.name()
            ))
        })
    }

    fn evaluate(&self, query: &RegionQuery<'_>) -> Result<ScorerOutput> {
        let key = query_key(query);
        let entry = self.maps.get(&key).ok_or_else(|| {
            Error::MissingInput(format!(
                "replay directory {} has no {} map for image {} at shift ({}, {})/{} (key {key})",
                self.root.display(),
                query.detector.name(),
                query.image_id,
                query.shift.dx,
                query.shift.dy,
                query.shift.f
            ))
        })?;
        let fcn = load_grid(&self.root.join(&entry.fcn))?.into_confidence()?;
        let features = load_grid(&self.root.join(&entry.features))?.into_features()?;
        Ok(ScorerOutput {
            fcn,
            features,
            score: entry.score,
        })
    }
}

#[derive(Debug, Default)]
struct Recorded {
    weights: BTreeMap<String, Vec<f64>>,
    maps: BTreeMap<String, MapEntry>,
}

/// Wraps a backend and writes every answer into a replay directory.
/// Call [`RecordingBackend::finish`] to write the manifest.
#[derive(Debug)]
pub struct RecordingBackend<B> {
    inner: B,
    root: PathBuf,
    recorded: Mutex<Recorded>,
}

impl<B: ScorerBackend> RecordingBackend<B> {
    pub fn new(inner: B, root: &Path) -> Self {
        RecordingBackend {
            inner,
            root: root.to_path_buf(),
            recorded: Mutex::new(Recorded::default()),
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Recorded> {
        self.recorded.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Write the manifest; returns the number of recorded maps.
    pub fn finish(&self) -> Result<usize> {
        let rec = self.lock();
        let g = self.inner.geometry();
        let mut lines = vec![ManifestLine::Geometry {
            input_w: g.input_w,
            input_h: g.input_h,
            stride: g.stride,
        }];
        lines.extend(rec.weights.iter().map(|(d, w)| ManifestLine::Weights {
            detector: d.clone(),
            weights: w.clone(),
        }));
        lines.extend(rec.maps.values().cloned().map(ManifestLine::Map));
        let mut text = String::new();
        for l in &lines {
            text.push_str(&serde_json::to_string(l).map_err(|e| Error::invalid(e.to_string()))?);
            text.push('\n');
        }
        write_atomic(&self.root.join(MANIFEST_FILE), text.as_bytes())?;
        Ok(rec.maps.len())
    }
}

impl<B: ScorerBackend> ScorerBackend for RecordingBackend<B> {
    fn geometry(&self) -> BackendGeometry {
        self.inner.geometry()
    }

    fn class_weights(&self, detector: Detector) -> Result<ClassWeights> {
        let w = self.inner.class_weights(detector)?;
        self.lock().weights.insert(detector.name().to_string(), w.0.clone());
        Ok(w)
    }

    fn evaluate(&self, query: &RegionQuery<'_>) -> Result<ScorerOutput> {
        let out = self.inner.evaluate(query)?;
        let key = query_key(query);
        if self.lock().maps.contains_key(&key) {
            return Ok(out);
        }
        let dir = format!("maps/{}", file_safe(query.image_id));
        let fcn = format!("{dir}/{key}.fcn.grid");
        let features = format!("{dir}/{key}.feat.grid");
        save_grid(&self.root.join(&fcn), &Grid::Confidence(out.fcn.clone()))?;
        save_grid(&self.root.join(&features), &Grid::Features(out.features.clone()))?;
        let entry = MapEntry {
            image_id: query.image_id.to_string(),
            detector: query.detector.name().to_string(),
            key: key.clone(),
            dx: query.shift.dx,
            dy: query.shift.dy,
            f: query.shift.f,
            region: query.base_region,
            score: out.score,
            fcn,
            features,
        };
        self.lock().maps.insert(key, entry);
        Ok(out)
    }

    fn concurrent(&self) -> bool {
        self.inner.concurrent()
    }
}
