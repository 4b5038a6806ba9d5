//! Run configuration: every pipeline parameter with its default, loadable
//! from a TOML file and overridable from the command line.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alignment::AlignParams;
use crate::data::scene::SceneParams;
use crate::error::{Error, Result};
use crate::evaluation::SubsetFilter;
use crate::heatmap::BackendGeometry;
use crate::parts::MergeParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Proposals scoring above this keep their score untouched.
    pub th_b: f64,
    pub nms_iou: f64,
    pub expand: f64,
    /// Shift-and-stitch factor.
    pub f: u32,
    /// Target window size relative to the expanded region.
    pub enlarge: f64,
    /// Upsampled map size `[rows, cols]`; omitted means square pixel cells.
    pub upsample: Option<[usize; 2]>,
    pub clamp_delta: bool,
    /// Center stitched maps on the expanded region.
    pub center_shifts: bool,
    pub part_weights: [f64; 3],
    pub penalty_a: f64,
    pub penalty_b: f64,
    /// Divide part displacements by the box width/height before penalizing.
    pub normalize_penalty: bool,
    pub min_height: f64,
    pub min_visibility: f64,
    pub eval_iou: f64,
    pub no_saliency: bool,
    /// Images produced by `gen`.
    pub n_images: usize,
    pub scene: SceneParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        let merge = MergeParams::default();
        let filter = SubsetFilter::default();
        let align = AlignParams::default();
        RunConfig {
            seed: 0,
            th_b: crate::saliency::DEFAULT_TH_B,
            nms_iou: crate::geometry::DEFAULT_NMS_IOU,
            expand: align.expand_ratio,
            f: align.f,
            enlarge: align.enlarge,
            upsample: None,
            clamp_delta: align.clamp_delta,
            center_shifts: align.center_shifts,
            part_weights: merge.weights,
            penalty_a: merge.a,
            penalty_b: merge.b,
            normalize_penalty: false,
            min_height: filter.min_height,
            min_visibility: filter.min_visibility,
            eval_iou: crate::evaluation::DEFAULT_MATCH_IOU,
            no_saliency: false,
            n_images: 8,
            scene: SceneParams::default(),
        }
    }
}

fn unit_open_closed(name: &str, v: f64, out: &mut Vec<String>) {
    if !(v > 0.0 && v <= 1.0) {
        out.push(format!("{name} must lie in (0, 1], got {v}"));
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, name: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: name.to_string(),
            line: e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(0),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration is always representable")
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.th_b) {
            out.push(format!("th_b must lie in [0, 1], got {}", self.th_b));
        }
        unit_open_closed("nms_iou", self.nms_iou, &mut out);
        unit_open_closed("eval_iou", self.eval_iou, &mut out);
        if !(self.expand >= 0.0 && self.expand.is_finite()) {
            out.push(format!("expand must be >= 0, got {}", self.expand));
        }
        if let Err(e) = BackendGeometry::default().check_factor(self.f) {
            out.push(e.to_string());
        }
        if !(self.enlarge > 0.0 && self.enlarge.is_finite()) {
            out.push(format!("enlarge must be positive, got {}", self.enlarge));
        }
        if let Some([r, c]) = self.upsample {
            if r == 0 || c == 0 {
                out.push(format!("upsample dims must be positive, got {r}x{c}"));
            }
        }
        if let Err(Error::InvalidParameter(m)) = self.merge_params().validate() {
            out.push(m);
        }
        if !(self.min_height >= 0.0 && self.min_height.is_finite()) {
            out.push(format!("min_height must be >= 0, got {}", self.min_height));
        }
        if !(0.0..=1.0).contains(&self.min_visibility) {
            out.push(format!("min_visibility must lie in [0, 1], got {}", self.min_visibility));
        }
        out.extend(self.scene.problems());
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

    pub fn align_params(&self) -> AlignParams {
        AlignParams {
            expand_ratio: self.expand,
            f: self.f,
            enlarge: self.enlarge,
            upsample: self.upsample.map(|[r, c]| (r, c)),
            clamp_delta: self.clamp_delta,
            center_shifts: self.center_shifts,
        }
    }

    pub fn merge_params(&self) -> MergeParams {
        MergeParams {
            weights: self.part_weights,
            a: self.penalty_a,
            b: self.penalty_b,
        }
    }

    pub fn filter(&self) -> SubsetFilter {
        SubsetFilter {
            min_height: self.min_height,
            min_visibility: self.min_visibility,
        }
    }
}
