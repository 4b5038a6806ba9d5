//! Synthetic scenes with planted pedestrians, distractors and jittered
//! proposals, plus an analytic scorer backend whose responses peak at the
//! planted positions.
//!
//! Responses are sums of Gaussian profiles plus a smooth sinusoidal noise
//! field, so every backend output is a closed-form function of absolute
//! pixel position.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{expand_box, BBox};
use crate::heatmap::{
    BackendGeometry, ClassWeights, ConfidenceMap, Detector, FeatureGrid, RegionQuery, ScorerBackend, ScorerOutput,
};
use crate::parts::part_boxes;
use crate::saliency::{center_span, SaliencyMap};

const MAX_PLACEMENT_TRIES: usize = 1000;
/// Planted objects keep this much relative clearance from each other.
const PLACEMENT_MARGIN: f64 = 0.25;
const NOISE_COMPONENTS: usize = 4;

/// Generator knobs. All randomness comes from the seed passed alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneParams {
    pub image_width: u32,
    pub image_height: u32,
    pub n_pedestrians: usize,
    pub n_distractors: usize,
    /// Per-axis standard deviation of the proposal center jitter, pixels.
    pub jitter_sigma: f64,
    /// Probability that a pedestrian is occluded from below.
    pub occlusion_fraction: f64,
    pub min_height: f64,
    pub max_height: f64,
    /// Width over height of pedestrian boxes.
    pub aspect: f64,
    /// Extra lower-scored proposals around each pedestrian.
    pub duplicates: usize,
    pub pedestrian_scores: [f64; 2],
    pub distractor_scores: [f64; 2],
    /// Saliency inside distractor regions.
    pub distractor_saliency: f64,
    /// Amplitude of saliency noise and of the response noise field.
    pub noise: f64,
    /// Shape of the confidence response around each object.
    pub response: ResponseProfile,
    /// Shape of the activation response.
    pub cam_response: ResponseProfile,
    /// Peak response of the root detector on a distractor.
    pub distractor_response: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            image_width: 640,
            image_height: 480,
            n_pedestrians: 4,
            n_distractors: 3,
            jitter_sigma: 8.0,
            occlusion_fraction: 0.0,
            min_height: 60.0,
            max_height: 160.0,
            aspect: 0.41,
            duplicates: 2,
            pedestrian_scores: [0.6, 0.95],
            distractor_scores: [0.3, 0.5],
            distractor_saliency: 0.1,
            noise: 0.05,
            response: ResponseProfile::default(),
            cam_response: ResponseProfile {
                hill_width: 0.4,
                ..ResponseProfile::default()
            },
            distractor_response: 0.2,
        }
    }
}

impl SceneParams {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.image_width == 0 || self.image_height == 0 {
            out.push("scene image dimensions must be positive".to_string());
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            out.push(format!("jitter_sigma must be >= 0, got {}", self.jitter_sigma));
        }
        if !(0.0..=1.0).contains(&self.occlusion_fraction) {
            out.push(format!("occlusion_fraction must lie in [0, 1], got {}", self.occlusion_fraction));
        }
        if !(self.min_height > 0.0 && self.min_height <= self.max_height) {
            out.push(format!(
                "heights need 0 < min_height <= max_height, got {} and {}",
                self.min_height, self.max_height
            ));
        }
        if !(self.aspect > 0.0 && self.aspect.is_finite()) {
            out.push(format!("aspect must be positive, got {}", self.aspect));
        }
        for (name, r) in [("pedestrian_scores", self.pedestrian_scores), ("distractor_scores", self.distractor_scores)] {
            if !(r[0] <= r[1] && r[0].is_finite() && r[1].is_finite()) {
                out.push(format!("{name} must be an increasing pair, got {r:?}"));
            }
        }
        if !(0.0..=1.0).contains(&self.distractor_saliency) {
            out.push(format!("distractor_saliency must lie in [0, 1], got {}", self.distractor_saliency));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            out.push(format!("noise must lie in [0, 1], got {}", self.noise));
        }
        out.extend(self.response.problems("response"));
        out.extend(self.cam_response.problems("cam_response"));
        if !self.distractor_response.is_finite() {
            out.push("distractor_response must be finite".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(p))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPedestrian {
    pub bb_full: BBox,
    pub bb_vis: BBox,
    /// Head, torso, legs: thirds of `bb_vis`.
    pub parts: [BBox; 3],
}

/// Smooth pseudo-random field `amp * mean_m sin(kx x + px) sin(ky y + py)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseField {
    pub amplitude: f64,
    /// `[kx, px, ky, py]` per component.
    pub components: Vec<[f64; 4]>,
}

impl NoiseField {
    fn random(rng: &mut ChaCha8Rng, amplitude: f64) -> Self {
        let components = (0..NOISE_COMPONENTS)
            .map(|_| {
                let kx = std::f64::consts::TAU / rng.random_range(20.0..60.0);
                let ky = std::f64::consts::TAU / rng.random_range(20.0..60.0);
                [kx, rng.random_range(0.0..std::f64::consts::TAU), ky, rng.random_range(0.0..std::f64::consts::TAU)]
            })
            .collect();
        NoiseField { amplitude, components }
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        if self.amplitude == 0.0 || self.components.is_empty() {
            return 0.0;
        }
        let s: f64 = self
            .components
            .iter()
            .map(|[kx, px, ky, py]| (kx * x + px).sin() * (ky * y + py).sin())
            .sum();
        self.amplitude * s / self.components.len() as f64
    }
}

/// Everything the analytic backend needs to answer queries on one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneField {
    pub width: u32,
    pub height: u32,
    pub pedestrians: Vec<PlantedPedestrian>,
    pub distractors: Vec<BBox>,
    pub response: ResponseProfile,
    pub cam_response: ResponseProfile,
    pub distractor_response: f64,
    pub noise: NoiseField,
    pub cam_noise: NoiseField,
}

/// Response around one object: a broad Gaussian hill scaled to the box
/// plus a sharp isotropic peak at its center, mixed to a maximum of one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResponseProfile {
    /// Hill standard deviations as fractions of box width and height.
    pub hill_width: f64,
    /// Peak standard deviation as a fraction of box width.
    pub peak_width: f64,
    /// Share of the peak in the mix, in `[0, 1]`.
    pub peak_weight: f64,
}

impl Default for ResponseProfile {
    fn default() -> Self {
        ResponseProfile {
            hill_width: 0.3,
            peak_width: 0.08,
            peak_weight: 0.9,
        }
    }
}

impl ResponseProfile {
    pub fn problems(&self, name: &str) -> Vec<String> {
        let mut out = Vec::new();
        for (field, v) in [("hill_width", self.hill_width), ("peak_width", self.peak_width)] {
            if !(v > 0.0 && v.is_finite()) {
                out.push(format!("{name}.{field} must be positive, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&self.peak_weight) {
            out.push(format!("{name}.peak_weight must lie in [0, 1], got {}", self.peak_weight));
        }
        out
    }

    pub fn at(&self, b: &BBox, x: f64, y: f64) -> f64 {
        let (cx, cy) = b.center();
        let (dx, dy) = (x - cx, y - cy);
        let (hx, hy) = (dx / (self.hill_width * b.w()), dy / (self.hill_width * b.h()));
        let hill = (-(hx * hx + hy * hy) / 2.0).exp();
        let ps = self.peak_width * b.w();
        let peak = (-(dx * dx + dy * dy) / (2.0 * ps * ps)).exp();
        (1.0 - self.peak_weight) * hill + self.peak_weight * peak
    }
}

impl SceneField {
    fn targets(&self, detector: Detector) -> impl Iterator<Item = &BBox> + '_ {
        self.pedestrians.iter().map(move |p| match detector {
            Detector::Root => &p.bb_full,
            Detector::Part(k) => &p.parts[k.index()],
        })
    }

    /// Noise-free response sum; distractors only excite the root detector.
    pub fn clean_response(&self, detector: Detector, profile: &ResponseProfile, x: f64, y: f64) -> f64 {
        let mut v: f64 = self.targets(detector).map(|b| profile.at(b, x, y)).sum();
        if detector == Detector::Root {
            v += self
                .distractors
                .iter()
                .map(|d| self.distractor_response * profile.at(d, x, y))
                .sum::<f64>();
        }
        v
    }

    /// FCN confidence at an absolute pixel position.
    pub fn response(&self, detector: Detector, x: f64, y: f64) -> f64 {
        self.clean_response(detector, &self.response, x, y) + self.noise.at(x, y)
    }

    /// The two activation channels at an absolute pixel position.
    pub fn features(&self, detector: Detector, x: f64, y: f64) -> [f64; 2] {
        [
            self.clean_response(detector, &self.cam_response, x, y),
            self.cam_noise.at(x, y),
        ]
    }
}

/// Where a generated proposal came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalSource {
    Pedestrian,
    Duplicate,
    Distractor,
}

impl ProposalSource {
    pub fn name(self) -> &'static str {
        match self {
            ProposalSource::Pedestrian => "pedestrian",
            ProposalSource::Duplicate => "duplicate",
            ProposalSource::Distractor => "distractor",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedProposal {
    pub bbox: BBox,
    pub score: f64,
    pub source: ProposalSource,
    /// Index of the generating pedestrian or distractor.
    pub truth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub seed: u64,
    pub field: SceneField,
    pub saliency: SaliencyMap,
    pub proposals: Vec<PlantedProposal>,
}

impl SyntheticScene {
    pub fn pedestrians(&self) -> &[PlantedPedestrian] {
        &self.field.pedestrians
    }

    pub fn distractors(&self) -> &[BBox] {
        &self.field.distractors
    }
}

/// Derive the seed of scene `index` from a run seed (SplitMix64 step).
pub fn scene_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_range(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn quantize(v: f64) -> f64 {
    ((v * 100.0).round() / 100.0).clamp(0.0, 1.0)
}

fn place_object(rng: &mut ChaCha8Rng, params: &SceneParams, taken: &[BBox], what: &str) -> Result<BBox> {
    let (iw, ih) = (params.image_width as f64, params.image_height as f64);
    for _ in 0..MAX_PLACEMENT_TRIES {
        let h = sample_range(rng, [params.min_height, params.max_height]);
        let w = params.aspect * h;
        if w >= iw || h >= ih {
            continue;
        }
        let x = rng.random_range(0.0..iw - w);
        let y = rng.random_range(0.0..ih - h);
        let cand = BBox::new(x, y, w, h)?;
        let padded = expand_box(&cand, PLACEMENT_MARGIN)?;
        let clear = taken
            .iter()
            .all(|t| expand_box(t, PLACEMENT_MARGIN).map(|p| p.intersection_area(&padded) == 0.0).unwrap_or(false));
        if clear {
            return Ok(cand);
        }
    }
    Err(Error::Generation(format!(
        "could not place {what} {} in a {}x{} image after {MAX_PLACEMENT_TRIES} tries",
        taken.len() + 1,
        params.image_width,
        params.image_height
    )))
}

// Move `b` by clipped Gaussian jitter, keeping its center inside the image.
fn jitter(rng: &mut ChaCha8Rng, b: &BBox, sigma: f64, image: (f64, f64)) -> Result<BBox> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let limit = 3.0 * sigma;
    let dx = normal.sample(rng).clamp(-limit, limit);
    let dy = normal.sample(rng).clamp(-limit, limit);
    let (cx, cy) = b.center();
    let dx = (cx + dx).clamp(0.0, image.0) - cx;
    let dy = (cy + dy).clamp(0.0, image.1) - cy;
    b.translate(dx, dy)
}

/// Build one synthetic scene. Deterministic in `(params, seed)`.
pub fn generate_scene(params: &SceneParams, seed: u64) -> Result<SyntheticScene> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (iw, ih) = (params.image_width as f64, params.image_height as f64);

    let mut taken: Vec<BBox> = Vec::new();
    let mut pedestrians = Vec::with_capacity(params.n_pedestrians);
    for _ in 0..params.n_pedestrians {
        let bb_full = place_object(&mut rng, params, &taken, "pedestrian")?;
        taken.push(bb_full);
        let occluded = rng.random::<f64>() < params.occlusion_fraction;
        let visibility = if occluded { rng.random_range(0.2..0.6) } else { 1.0 };
        let bb_vis = if occluded {
            BBox::new(bb_full.x(), bb_full.y(), bb_full.w(), bb_full.h() * visibility)?
        } else {
            bb_full
        };
        let parts = part_boxes(&bb_vis).map(|(_, b)| b);
        pedestrians.push(PlantedPedestrian { bb_full, bb_vis, parts });
    }
    let mut distractors = Vec::with_capacity(params.n_distractors);
    for _ in 0..params.n_distractors {
        let d = place_object(&mut rng, params, &taken, "distractor")?;
        taken.push(d);
        distractors.push(d);
    }

    // saliency: noisy background, faint distractors, bright visible pedestrians
    let (w, h) = (params.image_width as usize, params.image_height as usize);
    let mut values: Vec<f64> = (0..w * h).map(|_| quantize(rng.random::<f64>() * params.noise)).collect();
    let mut paint = |b: &BBox, value: &mut dyn FnMut() -> f64| {
        let rows = center_span(b.y(), b.bottom(), h);
        let cols = center_span(b.x(), b.right(), w);
        for r in rows {
            for c in cols.clone() {
                values[r * w + c] = value();
            }
        }
    };
    for d in &distractors {
        paint(d, &mut || params.distractor_saliency);
    }
    for p in &pedestrians {
        paint(&p.bb_vis, &mut || quantize(1.0 - rng.random::<f64>() * params.noise));
    }
    let saliency = SaliencyMap::new(w, h, values)?;

    let mut proposals = Vec::new();
    for (i, p) in pedestrians.iter().enumerate() {
        let score = sample_range(&mut rng, params.pedestrian_scores);
        proposals.push(PlantedProposal {
            bbox: jitter(&mut rng, &p.bb_full, params.jitter_sigma, (iw, ih))?,
            score,
            source: ProposalSource::Pedestrian,
            truth: i,
        });
        for _ in 0..params.duplicates {
            let drop = rng.random_range(0.05..0.3);
            proposals.push(PlantedProposal {
                bbox: jitter(&mut rng, &p.bb_full, 1.5 * params.jitter_sigma, (iw, ih))?,
                score: score - drop,
                source: ProposalSource::Duplicate,
                truth: i,
            });
        }
    }
    for (i, d) in distractors.iter().enumerate() {
        proposals.push(PlantedProposal {
            bbox: *d,
            score: sample_range(&mut rng, params.distractor_scores),
            source: ProposalSource::Distractor,
            truth: i,
        });
    }

    let noise = NoiseField::random(&mut rng, params.noise);
    let cam_noise = NoiseField::random(&mut rng, params.noise);
    Ok(SyntheticScene {
        seed,
        field: SceneField {
            width: params.image_width,
            height: params.image_height,
            pedestrians,
            distractors,
            response: params.response,
            cam_response: params.cam_response,
            distractor_response: params.distractor_response,
            noise,
            cam_noise,
        },
        saliency,
        proposals,
    })
}

/// Analytic backend answering from planted scene fields.
#[derive(Debug, Clone, Default)]
pub struct SyntheticBackend {
    fields: BTreeMap<String, SceneField>,
}

/// On-disk form of a [`SyntheticBackend`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub scenes: BTreeMap<String, SceneField>,
}

impl SyntheticBackend {
    pub fn new() -> Self {
        SyntheticBackend::default()
    }

    pub fn with_scene(mut self, image_id: impl Into<String>, field: SceneField) -> Self {
        self.insert(image_id, field);
        self
    }

    pub fn insert(&mut self, image_id: impl Into<String>, field: SceneField) {
        self.fields.insert(image_id.into(), field);
    }

    pub fn field(&self, image_id: &str) -> Option<&SceneField> {
        self.fields.get(image_id)
    }

    pub fn to_file(&self) -> SceneFile {
        SceneFile {
            scenes: self.fields.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file()).map_err(|e| Error::invalid(e.to_string()))?;
        super::write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: SceneFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        Ok(SyntheticBackend { fields: file.scenes })
    }
}

impl ScorerBackend for SyntheticBackend {
    fn class_weights(&self, _detector: Detector) -> Result<ClassWeights> {
        Ok(ClassWeights(vec![1.0, 1.0]))
    }

    fn evaluate(&self, query: &RegionQuery<'_>) -> Result<ScorerOutput> {
        let field = self.fields.get(query.image_id).ok_or_else(|| {
            Error::MissingInput(format!("synthetic backend has no scene for image {}", query.image_id))
        })?;
        let geometry = self.geometry();
        let frame = geometry.frame_for(&query.region)?;
        let (rows, cols) = geometry.map_dims();
        let detector = query.detector;

        let fcn = ConfidenceMap::from_fn(rows, cols, frame, |r, c| {
            let (x, y) = frame.cell_center(r as f64, c as f64);
            field.response(detector, x, y)
        })?;
        let mut feats = Vec::with_capacity(rows * cols * 2);
        for r in 0..rows {
            for c in 0..cols {
                let (x, y) = frame.cell_center(r as f64, c as f64);
                feats.extend(field.features(detector, x, y));
            }
        }
        let features = FeatureGrid::new(rows, cols, 2, feats, frame)?;
        let score = match detector {
            Detector::Root => {
                let (cx, cy) = query.region.center();
                field.response(Detector::Root, cx, cy)
            }
            Detector::Part(_) => fcn.min_max().1,
        };
        Ok(ScorerOutput { fcn, features, score })
    }
}

/// Geometry used by the synthetic backend.
pub fn synthetic_geometry() -> BackendGeometry {
    BackendGeometry::default()
}
