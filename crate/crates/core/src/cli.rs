//! Command-line surface: `gen`, `detect`, `align`, `eval`, `curve-export`.
//!
//! Settings layer as built-in defaults, then the `--config` file, then
//! flags. Every output file is written atomically.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use crate::config::RunConfig;
use crate::data::grid::{load_grid, save_grid, Grid};
use crate::data::replay::{DirectoryBackend, RecordingBackend};
use crate::data::scene::{generate_scene, scene_seed, SyntheticBackend, SyntheticScene};
use crate::data::{
    load_dataset, load_detections, saliency_path, save_dataset, save_detections, write_atomic, AnnotationRecord,
    Dataset, DetectionRecord, ImageInfo, SCENE_FILE,
};
use crate::error::{Error, ErrorKind, Result};
use crate::evaluation::{evaluate, Annotation, EvalCurve, ImageEval};
use crate::geometry::ScoredBox;
use crate::heatmap::ScorerBackend;
use crate::pipeline::{align_image, detect_image};

#[derive(Debug, Parser)]
#[command(name = "pedalign", version, about = "Pedestrian detection post-processing and evaluation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Keep proposal scores as they are instead of saliency re-weighting.
    #[arg(long, global = true)]
    pub no_saliency: bool,
    /// Cap the alignment confidence ratio at 1.
    #[arg(long, global = true)]
    pub clamp_delta: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with saliency maps and a scorer backend.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_images: Option<usize>,
    },
    /// Saliency re-weighting followed by NMS.
    Detect {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Align detections, evaluate parts and merge scores.
    Align {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replay recorded backend outputs instead of the dataset's scene.
        #[arg(long)]
        backend_dir: Option<PathBuf>,
        /// Record every backend answer into this directory.
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Miss rate against FPPI; prints the summary as one JSON line.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        /// Also write the curve table here.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Write the curve table and its summary record for plotting.
    CurveExport {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Validation | ErrorKind::Parse | ErrorKind::InvalidParameter => 2,
        ErrorKind::MissingInput => 3,
        ErrorKind::UndefinedMetric => 4,
        _ => 1,
    }
}

/// Single-line diagnostic: `error kind=<kind>: <message>`.
pub fn diagnostic(e: &Error) -> String {
    let msg = e.to_string().replace(['\n', '\r'], " ");
    format!("error kind={}: {msg}", e.kind().as_str())
}

/// Resolve the effective configuration from defaults, file and flags.
pub fn resolve_config(global: &GlobalArgs, command: &Command) -> Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    if global.no_saliency {
        cfg.no_saliency = true;
    }
    if global.clamp_delta {
        cfg.clamp_delta = true;
    }
    if let Command::Gen { n_images: Some(n), .. } = command {
        cfg.n_images = *n;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli, stdout: &mut dyn std::io::Write) -> Result<()> {
    let cfg = resolve_config(&cli.global, &cli.command)?;
    if let Some(n) = cli.global.jobs {
        if n == 0 {
            return Err(Error::Validation(vec!["--jobs must be at least 1".to_string()]));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Gen { out, .. } => cmd_gen(&cfg, out),
        Command::Detect { dataset, out } => cmd_detect(&cfg, dataset, out),
        Command::Align {
            dataset,
            detections,
            out,
            backend_dir,
            record,
        } => cmd_align(&cfg, dataset, detections, out, backend_dir.as_deref(), record.as_deref()),
        Command::Eval {
            dataset,
            detections,
            curve,
        } => {
            let c = cmd_eval(&cfg, dataset, detections)?;
            if let Some(p) = curve {
                write_atomic(p, c.to_table().as_bytes())?;
            }
            let line = serde_json::to_string(&c.summary()).map_err(|e| Error::invalid(e.to_string()))?;
            writeln!(stdout, "{line}").map_err(|e| Error::io("<stdout>", e))
        }
        Command::CurveExport {
            dataset,
            detections,
            out,
            summary,
        } => {
            let c = cmd_eval(&cfg, dataset, detections)?;
            write_atomic(out, c.to_table().as_bytes())?;
            if let Some(p) = summary {
                let text = serde_json::to_string_pretty(&c.summary()).map_err(|e| Error::invalid(e.to_string()))?;
                write_atomic(p, format!("{text}\n").as_bytes())?;
            }
            Ok(())
        }
    }
}

fn image_id(i: usize) -> String {
    format!("img{i:04}")
}

/// Dataset records for one generated scene.
pub fn scene_records(id: &str, scene: &SyntheticScene) -> (ImageInfo, Vec<AnnotationRecord>, Vec<DetectionRecord>) {
    let mut info = ImageInfo::new(id, scene.field.width, scene.field.height);
    info.extra.insert("seed".into(), json!(scene.seed));
    let anns = scene
        .pedestrians()
        .iter()
        .map(|p| {
            let mut a = Annotation::new(id, p.bb_full);
            if p.bb_vis != p.bb_full {
                a.bb_vis = Some(p.bb_vis);
            }
            AnnotationRecord::from(a)
        })
        .collect();
    let props = scene
        .proposals
        .iter()
        .map(|p| {
            DetectionRecord::new(id, p.bbox, p.score)
                .with_extra("source", p.source.name())
                .with_extra("truth", p.truth)
        })
        .collect();
    (info, anns, props)
}

pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<()> {
    let scenes: Vec<SyntheticScene> = (0..cfg.n_images)
        .into_par_iter()
        .map(|i| {
            generate_scene(&cfg.scene, scene_seed(cfg.seed, i as u64)).map_err(|e| e.context(format!("image {}", image_id(i))))
        })
        .collect::<Result<_>>()?;
    let mut ds = Dataset::default();
    let mut backend = SyntheticBackend::new();
    for (i, scene) in scenes.iter().enumerate() {
        let id = image_id(i);
        let (info, anns, props) = scene_records(&id, scene);
        ds.images.push(info);
        ds.annotations.extend(anns);
        ds.proposals.extend(props);
        save_grid(&saliency_path(out, &id), &Grid::Saliency(scene.saliency.clone()))?;
        backend.insert(id, scene.field.clone());
    }
    ds.validate()?;
    save_dataset(&ds, out)?;
    backend.save(&out.join(SCENE_FILE))?;
    write_atomic(&out.join("config.toml"), cfg.to_toml().as_bytes())
}

fn sort_records(records: &mut [DetectionRecord]) {
    records.sort_by(|a, b| a.image_id.cmp(&b.image_id).then(b.score.total_cmp(&a.score)));
}

pub fn cmd_detect(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<()> {
    let ds = load_dataset(dataset)?;
    let root = dataset_root(dataset);
    let by_image = ds.proposals_by_image();
    let per_image: Vec<Vec<DetectionRecord>> = ds
        .images
        .par_iter()
        .map(|img| -> Result<Vec<DetectionRecord>> {
            let id = img.image_id.as_str();
            let recs = by_image.get(id).cloned().unwrap_or_default();
            if recs.is_empty() {
                return Ok(Vec::new());
            }
            let saliency = if cfg.no_saliency {
                None
            } else {
                let path = saliency_path(&root, id);
                let grid = load_grid(&path).map_err(|e| e.context(format!("saliency map for image {id}")))?;
                Some(grid.into_saliency().map_err(|e| e.context(format!("image {id}")))?)
            };
            let boxes: Vec<ScoredBox> = recs.iter().map(|r| r.scored_box()).collect::<Result<_>>()?;
            let kept = detect_image(&boxes, saliency.as_ref(), cfg).map_err(|e| e.context(format!("image {id}")))?;
            Ok(kept
                .into_iter()
                .map(|(i, b)| {
                    let mut r = DetectionRecord::new(id, b.bbox, b.score());
                    r.extra = recs[i].extra.clone();
                    r.with_extra("proposal_score", recs[i].score)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut records: Vec<DetectionRecord> = per_image.into_iter().flatten().collect();
    sort_records(&mut records);
    save_detections(&records, out)
}

fn dataset_root(dataset: &Path) -> PathBuf {
    if dataset.is_dir() {
        dataset.to_path_buf()
    } else {
        dataset.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
    }
}

fn known_image_detections<'a>(ds: &Dataset, dets: &'a [DetectionRecord]) -> Result<BTreeMap<&'a str, Vec<&'a DetectionRecord>>> {
    let grouped = crate::data::group_by_image(dets);
    let unknown: Vec<String> = grouped
        .keys()
        .filter(|id| ds.image(id).is_none())
        .map(|id| format!("detections reference unknown image {id}"))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Validation(unknown));
    }
    Ok(grouped)
}

pub fn cmd_align(
    cfg: &RunConfig,
    dataset: &Path,
    detections: &Path,
    out: &Path,
    backend_dir: Option<&Path>,
    record: Option<&Path>,
) -> Result<()> {
    let ds = load_dataset(dataset)?;
    let dets = load_detections(detections)?;
    let grouped = known_image_detections(&ds, &dets)?;
    let backend: Box<dyn ScorerBackend> = match backend_dir {
        Some(dir) => Box::new(DirectoryBackend::open(dir)?),
        None => Box::new(SyntheticBackend::load(&dataset_root(dataset).join(SCENE_FILE))?),
    };
    let recorder = record.map(|dir| RecordingBackend::new(backend.as_ref(), dir));
    let active: &dyn ScorerBackend = match &recorder {
        Some(r) => r,
        None => backend.as_ref(),
    };

    let mut records = Vec::new();
    for (id, recs) in &grouped {
        let boxes: Vec<ScoredBox> = recs.iter().map(|r| r.scored_box()).collect::<Result<_>>()?;
        let aligned = align_image(active, id, &boxes, cfg)?;
        for (rec, a) in recs.iter().zip(aligned) {
            let mut r = DetectionRecord::new(*id, a.bbox(), a.score);
            r.extra = rec.extra.clone();
            let parts: serde_json::Map<String, serde_json::Value> = a
                .parts
                .iter()
                .map(|p| (p.kind.name().to_string(), json!({"score": p.score, "position": [p.position.0, p.position.1]})))
                .collect();
            records.push(
                r.with_extra("input_box", json!(rec.bbox))
                    .with_extra("input_score", rec.score)
                    .with_extra("anchor", json!([a.trace.anchor.x_a, a.trace.anchor.y_a]))
                    .with_extra("parts", parts),
            );
        }
    }
    sort_records(&mut records);
    save_detections(&records, out)?;
    if let Some(r) = &recorder {
        r.finish()?;
    }
    Ok(())
}

pub fn cmd_eval(cfg: &RunConfig, dataset: &Path, detections: &Path) -> Result<EvalCurve> {
    let ds = load_dataset(dataset)?;
    let dets = load_detections(detections)?;
    let grouped = known_image_detections(&ds, &dets)?;
    let images = ds
        .images
        .iter()
        .map(|img| {
            let id = img.image_id.as_str();
            let detections = grouped
                .get(id)
                .map(|v| v.iter().map(|r| r.scored_box()).collect::<Result<Vec<_>>>())
                .transpose()?
                .unwrap_or_default();
            Ok(ImageEval {
                image_id: id.to_string(),
                detections,
                annotations: ds.annotations_for(id).cloned().collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate(&images, &cfg.filter(), cfg.eval_iou)
}
